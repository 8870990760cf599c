#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace causalnet::netcore {

// Directed weighted network of interaction counts. a_ij is the number of
// influence units from node i to node j; self-loops are not representable.
class InfluenceNetwork {
public:
    InfluenceNetwork() = default;
    explicit InfluenceNetwork(int n);

    int size() const { return n_; }

    // Sets a_src,dst = count. Zero counts are dropped from storage.
    void set_count(int src, int dst, long long count);
    long long count(int src, int dst) const;

    // Sorted by neighbor index; pairs of (neighbor, count).
    const std::map<int, long long>& out_edges(int i) const;
    const std::map<int, long long>& in_edges(int i) const;

    long long out_weight(int i) const;
    long long in_weight(int i) const;
    int out_degree(int i) const;
    int in_degree(int i) const;

    std::size_t edge_count() const { return edge_count_; }
    std::vector<std::tuple<int, int, long long>> edges() const;

private:
    void check_node(int i) const;

    int n_ = 0;
    std::size_t edge_count_ = 0;
    std::vector<std::map<int, long long>> out_;
    std::vector<std::map<int, long long>> in_;
};

struct NeighborhoodSpec {
    int hops = 1;
};

// Closed n-hop neighborhood of i, following edges backwards (in-neighbors:
// those who influence members of the set). Ordered by discovery: i first,
// then each hop's new nodes in ascending index.
std::vector<int> n_hop_neighborhood(const InfluenceNetwork& net, int i,
                                    const NeighborhoodSpec& spec);

// Edge-list CSV with header "src,dst,count". n defaults to max index + 1;
// pass n >= 0 to size the network explicitly.
InfluenceNetwork read_edge_csv(const std::string& path, int n = -1);
void write_edge_csv(const InfluenceNetwork& net, const std::string& path);

} // namespace causalnet::netcore
