#ifndef CMCAL_CMCAL_HPP
#define CMCAL_CMCAL_HPP

#include "cmcal/calibrators.hpp"
#include "cmcal/conformal.hpp"
#include "cmcal/core.hpp"
#include "cmcal/dataset.hpp"
#include "cmcal/experiment.hpp"
#include "cmcal/golden.hpp"
#include "cmcal/isotonic.hpp"
#include "cmcal/metrics.hpp"
#include "cmcal/random.hpp"
#include "cmcal/synthetic.hpp"

#endif  // CMCAL_CMCAL_HPP
