#pragma once

#include <cstdint>
#include <vector>

#include "causalnet/network.hpp"

namespace causalnet::netcore {

// Normalized spectral clustering (Ng-Jordan-Weiss) of the symmetrized,
// binarized adjacency into k clusters. Returns a label in [0, k) per node.
std::vector<int> spectral_clusters(const InfluenceNetwork& net, int k,
                                   std::uint64_t seed);

} // namespace causalnet::netcore
