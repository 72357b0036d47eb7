#pragma once

#include "avdml/nuisance/bounds.hpp"
#include "avdml/nuisance/gbt.hpp"
#include "avdml/nuisance/linear.hpp"
#include "avdml/nuisance/model.hpp"
