#pragma once

#include "epsarb/errors.hpp"
#include "epsarb/norms.hpp"
#include "epsarb/parallel.hpp"
#include "epsarb/market.hpp"
#include "epsarb/lp.hpp"
#include "epsarb/cutting_plane.hpp"
#include "epsarb/transport.hpp"
#include "epsarb/arbitrage.hpp"
#include "epsarb/pricing.hpp"
#include "epsarb/adapted.hpp"
#include "epsarb/stability.hpp"
#include "epsarb/io.hpp"
