#pragma once

// Umbrella header.

#include "kgforge/checkpoint.hpp"
#include "kgforge/commands.hpp"
#include "kgforge/config.hpp"
#include "kgforge/features.hpp"
#include "kgforge/fusion.hpp"
#include "kgforge/gcl.hpp"
#include "kgforge/kg.hpp"
#include "kgforge/kge.hpp"
#include "kgforge/manifest.hpp"
#include "kgforge/metrics.hpp"
#include "kgforge/modality.hpp"
#include "kgforge/optim.hpp"
#include "kgforge/param_store.hpp"
#include "kgforge/rng.hpp"
#include "kgforge/sparse.hpp"
#include "kgforge/tape.hpp"
#include "kgforge/tensor.hpp"
#include "kgforge/text.hpp"
