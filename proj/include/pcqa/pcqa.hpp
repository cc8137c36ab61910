#pragma once

#include "pcqa/color.hpp"
#include "pcqa/csv.hpp"
#include "pcqa/eval.hpp"
#include "pcqa/kdtree.hpp"
#include "pcqa/metrics.hpp"
#include "pcqa/normals.hpp"
#include "pcqa/numeric.hpp"
#include "pcqa/parallel.hpp"
#include "pcqa/ply.hpp"
#include "pcqa/point_cloud.hpp"
#include "pcqa/svr.hpp"
