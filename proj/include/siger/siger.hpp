#pragma once

#include "siger/dataset.hpp"
#include "siger/dense.hpp"
#include "siger/eval.hpp"
#include "siger/graphs.hpp"
#include "siger/losses.hpp"
#include "siger/manifest.hpp"
#include "siger/model.hpp"
#include "siger/rng.hpp"
#include "siger/sparse.hpp"
#include "siger/synthetic.hpp"
#include "siger/tape.hpp"
#include "siger/trainer.hpp"
