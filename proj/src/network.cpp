#include "causalnet/network.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "causalnet/errors.hpp"

namespace causalnet::netcore {

InfluenceNetwork::InfluenceNetwork(int n) : n_(n), out_(n), in_(n) {
    if (n < 0)
        throw ConfigError("network size must be non-negative");
}

void InfluenceNetwork::check_node(int i) const {
    if (i < 0 || i >= n_)
        throw DataError("node index " + std::to_string(i) + " out of range [0, " +
                        std::to_string(n_) + ")");
}

void InfluenceNetwork::set_count(int src, int dst, long long count) {
    check_node(src);
    check_node(dst);
    if (src == dst)
        throw DataError("self-loop on node " + std::to_string(src) + " not allowed");
    if (count < 0)
        throw DataError("negative count on edge " + std::to_string(src) + "->" +
                        std::to_string(dst));
    auto it = out_[src].find(dst);
    if (count == 0) {
        if (it != out_[src].end()) {
            out_[src].erase(it);
            in_[dst].erase(src);
            --edge_count_;
        }
        return;
    }
    if (it == out_[src].end())
        ++edge_count_;
    out_[src][dst] = count;
    in_[dst][src] = count;
}

long long InfluenceNetwork::count(int src, int dst) const {
    check_node(src);
    check_node(dst);
    auto it = out_[src].find(dst);
    return it == out_[src].end() ? 0 : it->second;
}

const std::map<int, long long>& InfluenceNetwork::out_edges(int i) const {
    check_node(i);
    return out_[i];
}

const std::map<int, long long>& InfluenceNetwork::in_edges(int i) const {
    check_node(i);
    return in_[i];
}

long long InfluenceNetwork::out_weight(int i) const {
    check_node(i);
    long long w = 0;
    for (const auto& [j, c] : out_[i])
        w += c;
    return w;
}

long long InfluenceNetwork::in_weight(int i) const {
    check_node(i);
    long long w = 0;
    for (const auto& [j, c] : in_[i])
        w += c;
    return w;
}

int InfluenceNetwork::out_degree(int i) const {
    check_node(i);
    return static_cast<int>(out_[i].size());
}

int InfluenceNetwork::in_degree(int i) const {
    check_node(i);
    return static_cast<int>(in_[i].size());
}

std::vector<std::tuple<int, int, long long>> InfluenceNetwork::edges() const {
    std::vector<std::tuple<int, int, long long>> out;
    out.reserve(edge_count_);
    for (int i = 0; i < n_; ++i)
        for (const auto& [j, c] : out_[i])
            out.emplace_back(i, j, c);
    return out;
}

std::vector<int> n_hop_neighborhood(const InfluenceNetwork& net, int i,
                                    const NeighborhoodSpec& spec) {
    if (i < 0 || i >= net.size())
        throw DataError("node index out of range");
    if (spec.hops < 0)
        throw ConfigError("hops must be non-negative");
    std::vector<int> result{i};
    std::vector<char> seen(net.size(), 0);
    seen[i] = 1;
    std::vector<int> frontier{i};
    for (int hop = 0; hop < spec.hops && !frontier.empty(); ++hop) {
        std::vector<int> next;
        for (int l : frontier)
            for (const auto& [j, c] : net.in_edges(l))
                if (!seen[j]) {
                    seen[j] = 1;
                    next.push_back(j);
                }
        std::sort(next.begin(), next.end());
        result.insert(result.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    return result;
}

InfluenceNetwork read_edge_csv(const std::string& path, int n) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("src,dst,count", 0) != 0)
        throw DataError(path + ": expected header 'src,dst,count'");
    std::vector<std::tuple<int, int, long long>> rows;
    int max_node = -1;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::istringstream ss(line);
        std::string f1, f2, f3;
        if (!std::getline(ss, f1, ',') || !std::getline(ss, f2, ',') ||
            !std::getline(ss, f3))
            throw DataError(path + ": malformed row '" + line + "'");
        int src = std::stoi(f1);
        int dst = std::stoi(f2);
        long long c = std::stoll(f3);
        max_node = std::max({max_node, src, dst});
        rows.emplace_back(src, dst, c);
    }
    InfluenceNetwork net(n >= 0 ? n : max_node + 1);
    for (const auto& [src, dst, c] : rows)
        net.set_count(src, dst, c);
    return net;
}

void write_edge_csv(const InfluenceNetwork& net, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot open " + path + " for writing");
    out << "src,dst,count\n";
    for (const auto& [i, j, c] : net.edges())
        out << i << ',' << j << ',' << c << '\n';
}

} // namespace causalnet::netcore
