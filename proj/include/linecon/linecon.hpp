#pragma once

#include "linecon/binary_io.hpp"
#include "linecon/congraph.hpp"
#include "linecon/corpus.hpp"
#include "linecon/gradcheck.hpp"
#include "linecon/matrix.hpp"
#include "linecon/metrics.hpp"
#include "linecon/nn.hpp"
#include "linecon/optim.hpp"
#include "linecon/parallel.hpp"
#include "linecon/random.hpp"
#include "linecon/train.hpp"
