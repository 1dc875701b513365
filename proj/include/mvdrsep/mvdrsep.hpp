// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "mvdrsep/adaptive_frontend.hpp"
#include "mvdrsep/array_file.hpp"
#include "mvdrsep/beamforming.hpp"
#include "mvdrsep/error.hpp"
#include "mvdrsep/manifest.hpp"
#include "mvdrsep/metrics.hpp"
#include "mvdrsep/pipeline.hpp"
#include "mvdrsep/room_sim.hpp"
#include "mvdrsep/signal_core.hpp"
#include "mvdrsep/spatial_features.hpp"
#include "mvdrsep/speech_synth.hpp"
#include "mvdrsep/stoi.hpp"
#include "mvdrsep/wav_io.hpp"
