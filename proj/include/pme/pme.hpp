#pragma once

// Umbrella header for the whole library.

#include "pme/battery.hpp"
#include "pme/boundary_data.hpp"
#include "pme/errors.hpp"
#include "pme/exact.hpp"
#include "pme/experiment.hpp"
#include "pme/field.hpp"
#include "pme/geometry.hpp"
#include "pme/perron.hpp"
#include "pme/quadrature.hpp"
#include "pme/solver.hpp"
#include "pme/verify.hpp"
#include "pme/weak_form.hpp"
