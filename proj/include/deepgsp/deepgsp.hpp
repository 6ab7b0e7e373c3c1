#pragma once

// Everything: auction core, networks, simulator, trainer, audits and sweeps.
// config.hpp and manifest.hpp are separate because they pull in Boost and
// OpenSSL.

#include "deepgsp/auction.hpp"
#include "deepgsp/audit.hpp"
#include "deepgsp/error.hpp"
#include "deepgsp/experiment.hpp"
#include "deepgsp/parallel.hpp"
#include "deepgsp/rank_net.hpp"
#include "deepgsp/simulator.hpp"
#include "deepgsp/trainer.hpp"
