#pragma once

#include "conflab/config.hpp"
#include "conflab/data.hpp"
#include "conflab/experiment.hpp"
#include "conflab/metrics.hpp"
#include "conflab/mixing.hpp"
#include "conflab/nn.hpp"
#include "conflab/random.hpp"
#include "conflab/sam.hpp"
#include "conflab/sat.hpp"
#include "conflab/soft_labels.hpp"
#include "conflab/theory.hpp"
#include "conflab/trainer.hpp"
