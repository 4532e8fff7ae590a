#pragma once

// Everything except the live service (riskrl/serve.hpp, which needs the riskrl_serve target).

#include "riskrl/config.hpp"
#include "riskrl/gradcheck.hpp"
#include "riskrl/oracle.hpp"
