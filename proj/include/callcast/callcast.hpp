#pragma once

#include "callcast/error.hpp"
#include "callcast/csv.hpp"
#include "callcast/dataio.hpp"
#include "callcast/designspace.hpp"
#include "callcast/optimize.hpp"
#include "callcast/gausslik.hpp"
#include "callcast/poisscreen.hpp"
#include "callcast/forecaster.hpp"
#include "callcast/staffing.hpp"
#include "callcast/synthlab.hpp"
#include "callcast/parallel.hpp"
#include "callcast/harness.hpp"
#include "callcast/report.hpp"
