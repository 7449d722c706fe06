#pragma once

// Core library. PNG export lives in sssdr/image_io.hpp and needs libpng.

#include "sssdr/autodiff.hpp"
#include "sssdr/delaunay.hpp"
#include "sssdr/error.hpp"
#include "sssdr/geometry.hpp"
#include "sssdr/io.hpp"
#include "sssdr/loss.hpp"
#include "sssdr/parallel.hpp"
#include "sssdr/presets.hpp"
#include "sssdr/reconstruct.hpp"
#include "sssdr/renderer.hpp"
#include "sssdr/scene.hpp"
#include "sssdr/sonar_model.hpp"
