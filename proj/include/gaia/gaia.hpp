#pragma once

#include "gaia/arcpoint.hpp"
#include "gaia/checkpoint.hpp"
#include "gaia/config.hpp"
#include "gaia/evaluation.hpp"
#include "gaia/geometry.hpp"
#include "gaia/io.hpp"
#include "gaia/matrix.hpp"
#include "gaia/model.hpp"
#include "gaia/synth.hpp"
#include "gaia/training.hpp"
#include "gaia/uncertainty.hpp"
