#pragma once

// Everything except the network service (prosody_rl/live/server.hpp).

#include "prosody_rl/analysis.hpp"
#include "prosody_rl/audio.hpp"
#include "prosody_rl/error.hpp"
#include "prosody_rl/format.hpp"
#include "prosody_rl/gridworld.hpp"
#include "prosody_rl/live/engine.hpp"
#include "prosody_rl/prosody.hpp"
#include "prosody_rl/reward_learning.hpp"
#include "prosody_rl/reward_net.hpp"
#include "prosody_rl/session_log.hpp"
#include "prosody_rl/special.hpp"
#include "prosody_rl/stats.hpp"
#include "prosody_rl/synthetic_teacher.hpp"
#include "prosody_rl/tamer.hpp"
