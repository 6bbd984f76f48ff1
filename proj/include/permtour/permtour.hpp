#pragma once

// Umbrella header.

#include "permtour/assignment.hpp"
#include "permtour/baselines.hpp"
#include "permtour/checkpoint.hpp"
#include "permtour/config.hpp"
#include "permtour/ensemble.hpp"
#include "permtour/equifeat.hpp"
#include "permtour/error.hpp"
#include "permtour/instance.hpp"
#include "permtour/io.hpp"
#include "permtour/matrix.hpp"
#include "permtour/perm.hpp"
#include "permtour/report.hpp"
#include "permtour/rng.hpp"
#include "permtour/sct_gnn.hpp"
#include "permtour/sinkhorn.hpp"
#include "permtour/tensor.hpp"
#include "permtour/trainer.hpp"
