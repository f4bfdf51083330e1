#pragma once

#include "spikegate/experiment.hpp"
