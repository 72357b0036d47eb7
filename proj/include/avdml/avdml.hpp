#pragma once

#include "avdml/boundary.hpp"
#include "avdml/crossfit.hpp"
#include "avdml/engine.hpp"
#include "avdml/errors.hpp"
#include "avdml/nuisance.hpp"
#include "avdml/scores.hpp"
#include "avdml/sim.hpp"
