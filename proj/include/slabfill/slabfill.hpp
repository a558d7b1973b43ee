#ifndef SLABFILL_SLABFILL_HPP
#define SLABFILL_SLABFILL_HPP

#include "slabfill/adam.hpp"
#include "slabfill/errors.hpp"
#include "slabfill/imputer.hpp"
#include "slabfill/log.hpp"
#include "slabfill/loss.hpp"
#include "slabfill/metrics.hpp"
#include "slabfill/model_io.hpp"
#include "slabfill/nifti.hpp"
#include "slabfill/parallel.hpp"
#include "slabfill/rng.hpp"
#include "slabfill/run_config.hpp"
#include "slabfill/synth.hpp"
#include "slabfill/trainer.hpp"
#include "slabfill/unet.hpp"
#include "slabfill/volume.hpp"

#endif
