#pragma once

#include "transport/ate.hpp"
#include "transport/cmr.hpp"
#include "transport/common.hpp"
#include "transport/data.hpp"
#include "transport/finitediff.hpp"
#include "transport/glm.hpp"
#include "transport/linalg.hpp"
#include "transport/model_spec.hpp"
#include "transport/nuisance.hpp"
#include "transport/report_json.hpp"
#include "transport/rng.hpp"
#include "transport/simlab.hpp"
#include "transport/support.hpp"
