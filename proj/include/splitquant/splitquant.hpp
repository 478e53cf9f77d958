#pragma once

// Feature compression for split inference: scalar quantization with clipped
// linear scaling, KDE-based bit-width selection, a bit-exact wire codec, a
// top-k sparsification baseline, a toy straight-through training loop, and a
// client/server harness.

#include "splitquant/baseline.hpp"
#include "splitquant/bytes.hpp"
#include "splitquant/codec.hpp"
#include "splitquant/entropy.hpp"
#include "splitquant/quantizer.hpp"
#include "splitquant/random.hpp"
#include "splitquant/splitnet.hpp"
#include "splitquant/tensor.hpp"
#include "splitquant/training.hpp"
