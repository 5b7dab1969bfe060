#pragma once

#include "hesspcl/optim/adam.hpp"
#include "hesspcl/optim/history.hpp"
#include "hesspcl/optim/line_search.hpp"
#include "hesspcl/optim/objective.hpp"
#include "hesspcl/optim/quasi_newton.hpp"
#include "hesspcl/optim/trust_region.hpp"
