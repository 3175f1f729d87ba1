#pragma once

// Umbrella header for the context-gated predictive encoder library.

#include "penc/checkpoint.hpp"
#include "penc/datagen.hpp"
#include "penc/dataset_io.hpp"
#include "penc/errors.hpp"
#include "penc/eval.hpp"
#include "penc/inference.hpp"
#include "penc/io_util.hpp"
#include "penc/model.hpp"
#include "penc/numerics.hpp"
#include "penc/rng.hpp"
#include "penc/training.hpp"
#include "penc/version.hpp"
