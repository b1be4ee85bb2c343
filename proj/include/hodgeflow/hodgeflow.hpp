#pragma once

// Everything except io.hpp, which additionally needs nlohmann/json.

#include "hodgeflow/common.hpp"
#include "hodgeflow/ctde.hpp"
#include "hodgeflow/diagnostics.hpp"
#include "hodgeflow/domain.hpp"
#include "hodgeflow/dynamics.hpp"
#include "hodgeflow/fields.hpp"
#include "hodgeflow/graph.hpp"
#include "hodgeflow/metric.hpp"
#include "hodgeflow/neural.hpp"
#include "hodgeflow/projection.hpp"
