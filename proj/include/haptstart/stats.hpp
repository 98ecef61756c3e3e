#pragma once

#include "haptstart/stats/descriptive.hpp"
#include "haptstart/stats/distributions.hpp"
#include "haptstart/stats/likert.hpp"
#include "haptstart/stats/outliers.hpp"
#include "haptstart/stats/shapiro_wilk.hpp"
#include "haptstart/stats/tests.hpp"
