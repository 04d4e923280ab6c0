#pragma once

#include "evrep/autograd.hpp"
#include "evrep/checkpoint.hpp"
#include "evrep/class_lists.hpp"
#include "evrep/dataset.hpp"
#include "evrep/error.hpp"
#include "evrep/eval_harness.hpp"
#include "evrep/events.hpp"
#include "evrep/generator.hpp"
#include "evrep/hashing.hpp"
#include "evrep/image.hpp"
#include "evrep/llm_client.hpp"
#include "evrep/losses.hpp"
#include "evrep/png_io.hpp"
#include "evrep/random.hpp"
#include "evrep/representation.hpp"
#include "evrep/tensor.hpp"
#include "evrep/trainer.hpp"
