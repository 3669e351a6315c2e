#pragma once

#include "cigit/assignment.hpp"
#include "cigit/cgan.hpp"
#include "cigit/checkpoint.hpp"
#include "cigit/clusterhead.hpp"
#include "cigit/dataio.hpp"
#include "cigit/encoders.hpp"
#include "cigit/error.hpp"
#include "cigit/evalkit.hpp"
#include "cigit/experiment.hpp"
#include "cigit/linalg.hpp"
#include "cigit/metrics.hpp"
#include "cigit/nn.hpp"
#include "cigit/random.hpp"
#include "cigit/trainer.hpp"
