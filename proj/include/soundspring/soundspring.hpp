#ifndef SOUNDSPRING_SOUNDSPRING_HPP
#define SOUNDSPRING_SOUNDSPRING_HPP

#include "common.hpp"
#include "context_model.hpp"
#include "dependency.hpp"
#include "entropy_coder.hpp"
#include "experiment.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"
#include "pmf.hpp"
#include "rvq.hpp"
#include "synthetic.hpp"
#include "token_grid.hpp"
#include "toy_codec.hpp"
#include "transport.hpp"

#endif  // SOUNDSPRING_SOUNDSPRING_HPP
