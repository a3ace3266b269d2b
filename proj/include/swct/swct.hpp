#pragma once

#include "swct/contrast.hpp"
#include "swct/error.hpp"
#include "swct/estimators.hpp"
#include "swct/harness.hpp"
#include "swct/inference.hpp"
#include "swct/mem.hpp"
#include "swct/methods.hpp"
#include "swct/oracle.hpp"
#include "swct/parallel.hpp"
#include "swct/rng.hpp"
#include "swct/simgen.hpp"
#include "swct/simplex_lsq.hpp"
#include "swct/trial.hpp"
