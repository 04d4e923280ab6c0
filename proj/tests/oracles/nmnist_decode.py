# One-off decoder for the 5-byte ATIS record layout, independent of the C++ parser.
rec = bytes([0x02, 0x03, 0x80, 0x00, 0x64])
x, y = rec[0], rec[1]
p = +1 if rec[2] >> 7 else -1
t = int.from_bytes(bytes([rec[2] & 0x7F, rec[3], rec[4]]), "big")
print(f"x={x} y={y} p={p} t={t}")
