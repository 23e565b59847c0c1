#pragma once

#include "slcbm/checkpoint.hpp"
#include "slcbm/config.hpp"
#include "slcbm/core.hpp"
#include "slcbm/dataset.hpp"
#include "slcbm/encoders.hpp"
#include "slcbm/intervention.hpp"
#include "slcbm/losses.hpp"
#include "slcbm/metrics.hpp"
#include "slcbm/model.hpp"
#include "slcbm/optim.hpp"
#include "slcbm/png.hpp"
#include "slcbm/render.hpp"
#include "slcbm/trainer.hpp"
