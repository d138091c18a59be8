#pragma once

#include "gridsense/analysis.hpp"
#include "gridsense/datagen.hpp"
#include "gridsense/dataset_io.hpp"
#include "gridsense/error.hpp"
#include "gridsense/grid.hpp"
#include "gridsense/grid_io.hpp"
#include "gridsense/model.hpp"
#include "gridsense/model_io.hpp"
#include "gridsense/optim.hpp"
#include "gridsense/pipeline.hpp"
#include "gridsense/powerflow.hpp"
#include "gridsense/selection.hpp"
#include "gridsense/util.hpp"
