#pragma once

#include "acnescore/augmentation.hpp"
#include "acnescore/core.hpp"
#include "acnescore/dataset.hpp"
#include "acnescore/embedding.hpp"
#include "acnescore/evaluation.hpp"
#include "acnescore/face_patches.hpp"
#include "acnescore/head.hpp"
#include "acnescore/patch_manifest.hpp"
#include "acnescore/scoring.hpp"
