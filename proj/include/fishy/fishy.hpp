// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fishy/avar.hpp"
#include "fishy/config.hpp"
#include "fishy/coupled_sim.hpp"
#include "fishy/couplings.hpp"
#include "fishy/diagnostics.hpp"
#include "fishy/fishy_estimator.hpp"
#include "fishy/kernel.hpp"
#include "fishy/kernels.hpp"
#include "fishy/models.hpp"
#include "fishy/oracle.hpp"
#include "fishy/parallel.hpp"
#include "fishy/rng.hpp"
#include "fishy/unbiased.hpp"
