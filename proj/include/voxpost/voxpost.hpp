#pragma once

#include <voxpost/aggregate.hpp>
#include <voxpost/degrade.hpp>
#include <voxpost/error.hpp>
#include <voxpost/filters.hpp>
#include <voxpost/intensity.hpp>
#include <voxpost/metrics.hpp>
#include <voxpost/nifti.hpp>
#include <voxpost/pipeline.hpp>
#include <voxpost/ranking.hpp>
#include <voxpost/volume.hpp>
