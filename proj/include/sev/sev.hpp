#pragma once

#include "sev/checkpoint.hpp"
#include "sev/config.hpp"
#include "sev/data.hpp"
#include "sev/layers.hpp"
#include "sev/metrics.hpp"
#include "sev/model.hpp"
#include "sev/optimizer.hpp"
#include "sev/pooling.hpp"
#include "sev/rng.hpp"
#include "sev/serialized.hpp"
#include "sev/tensor.hpp"
#include "sev/train.hpp"
