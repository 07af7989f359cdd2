#pragma once

#include "assetis/conditional.hpp"
#include "assetis/dlm.hpp"
#include "assetis/gaussian_is.hpp"
#include "assetis/io.hpp"
#include "assetis/mc.hpp"
#include "assetis/subsets.hpp"
#include "assetis/types.hpp"
