// SPDX-License-Identifier: Apache-2.0
// Umbrella header for the whole library.
#pragma once

#include "cobra/bitpack.hpp"
#include "cobra/config.hpp"
#include "cobra/error.hpp"
#include "cobra/io.hpp"
#include "cobra/matrix.hpp"
#include "cobra/perf_model.hpp"
#include "cobra/pipeline.hpp"
#include "cobra/popcount.hpp"
#include "cobra/quant.hpp"
#include "cobra/rbmm.hpp"
#include "cobra/reference.hpp"
#include "cobra/selfcheck.hpp"
#include "cobra/sps.hpp"
#include "cobra/synthetic.hpp"
