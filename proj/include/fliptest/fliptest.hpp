#pragma once

// Umbrella header.

#include "fliptest/core_data.hpp"
#include "fliptest/csv.hpp"
#include "fliptest/errors.hpp"
#include "fliptest/exact_transport.hpp"
#include "fliptest/flip_analysis.hpp"
#include "fliptest/mlp.hpp"
#include "fliptest/model_io.hpp"
#include "fliptest/neural_transport.hpp"
#include "fliptest/random.hpp"
#include "fliptest/synth_models.hpp"
#include "fliptest/validation.hpp"
