# Layer-by-layer parameter count for the generator architecture.
# Independent of the C++ builder: enumerates layers from the architecture
# description and sums weight/bias/affine sizes (BN running stats excluded).
import sys

def conv(cin, cout, k, groups=1, bias=False):
    return cout * (cin // groups) * k * k + (cout if bias else 0)

def bn(c):
    return 2 * c

def block(kind, cin, cout, expansion, se_ratio):
    e = int(round(cin * expansion))
    if kind == "fused":
        if expansion == 1:
            return conv(cin, cout, 3) + bn(cout)
        return conv(cin, e, 3) + bn(e) + conv(e, cout, 1) + bn(cout)
    r = max(1, int(cin * se_ratio))
    n = conv(cin, e, 1) + bn(e)
    n += conv(e, e, 3, groups=e) + bn(e)
    n += conv(e, r, 1, bias=True) + conv(r, e, 1, bias=True)
    n += conv(e, cout, 1) + bn(cout)
    return n

def count(stem, chans, reps, kinds, expansion=4.0, se_ratio=0.25, head=16):
    total = conv(3, stem, 3) + bn(stem) + conv(stem, stem, 3) + bn(stem)
    levels = [stem] + chans
    for s in range(len(chans)):
        cin = levels[s]
        for i in range(reps[s]):
            total += block(kinds[s], cin if i == 0 else chans[s], chans[s], expansion, se_ratio)
    for s in reversed(range(len(chans))):
        cin = levels[s + 1] + levels[s]
        for i in range(reps[s]):
            total += block(kinds[s], cin if i == 0 else levels[s], levels[s], expansion, se_ratio)
    total += conv(stem, head, 1, bias=True) + conv(head, 3, 1, bias=True)
    return total

print("default", count(32, [48, 80, 160], [2, 2, 3], ["fused", "fused", "mbconv"]))
print("tiny_stem8", count(8, [16], [1], ["fused"]))
print("grad_stem4", count(4, [8], [1], ["mbconv"]))
