#pragma once

#include "error.hpp"
#include "rng.hpp"
#include "signal.hpp"
#include "signal_io.hpp"
#include "pade.hpp"
#include "lanczos.hpp"
#include "sparse.hpp"
#include "symbolic.hpp"
#include "rules.hpp"
#include "pipeline.hpp"
#include "bench.hpp"
