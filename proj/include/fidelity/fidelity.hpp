#pragma once

#include "fidelity/behavior.hpp"
#include "fidelity/collective.hpp"
#include "fidelity/config.hpp"
#include "fidelity/controller.hpp"
#include "fidelity/engine.hpp"
#include "fidelity/environment.hpp"
#include "fidelity/errors.hpp"
#include "fidelity/export.hpp"
#include "fidelity/format.hpp"
#include "fidelity/identity.hpp"
#include "fidelity/random.hpp"
#include "fidelity/reflection.hpp"
#include "fidelity/scenario.hpp"
