#pragma once

#include "patchguard/binary_io.hpp"
#include "patchguard/cache.hpp"
#include "patchguard/calibration.hpp"
#include "patchguard/embedding.hpp"
#include "patchguard/error.hpp"
#include "patchguard/eval.hpp"
#include "patchguard/manifest.hpp"
#include "patchguard/mask.hpp"
#include "patchguard/parallel.hpp"
#include "patchguard/postfilter.hpp"
#include "patchguard/scoring.hpp"
#include "patchguard/similarity.hpp"
#include "patchguard/synthgen.hpp"
