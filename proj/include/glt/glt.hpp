#pragma once

// Umbrella header for the whole library.

#include "glt/checkpoint.hpp"
#include "glt/clustering.hpp"
#include "glt/config.hpp"
#include "glt/data_eval.hpp"
#include "glt/encoder.hpp"
#include "glt/errors.hpp"
#include "glt/label_transfer.hpp"
#include "glt/losses.hpp"
#include "glt/matrix.hpp"
#include "glt/memory_bank.hpp"
#include "glt/prototypes.hpp"
#include "glt/rng.hpp"
#include "glt/trainer.hpp"
