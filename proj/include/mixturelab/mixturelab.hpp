#pragma once

#include "mixturelab/errors.hpp"
#include "mixturelab/rng.hpp"
#include "mixturelab/parallel.hpp"
#include "mixturelab/quadrature.hpp"
#include "mixturelab/model.hpp"
#include "mixturelab/estimation.hpp"
#include "mixturelab/information.hpp"
#include "mixturelab/theory.hpp"
#include "mixturelab/simgen.hpp"
#include "mixturelab/causal.hpp"
#include "mixturelab/report.hpp"
