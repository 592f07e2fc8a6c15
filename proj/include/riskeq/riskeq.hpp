#pragma once

#include "riskeq/agents.hpp"
#include "riskeq/config.hpp"
#include "riskeq/equilibrium.hpp"
#include "riskeq/market.hpp"
#include "riskeq/planner.hpp"
#include "riskeq/risk.hpp"
#include "riskeq/runner.hpp"
#include "riskeq/stability.hpp"
