// Exact discrete optimal transport on small supports.
//
// Two routes: exhaustive vertex enumeration over the transportation
// polytope (supports <= 4) and successive-shortest-path min-cost flow with
// Dijkstra potentials (supports <= 64). Both are exact; the small-support
// route doubles as a cross-check for the flow solver in tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include "uda/common.hpp"

namespace uda::est::detail {

// Basic feasible solutions of the transportation polytope correspond to
// spanning trees of the complete bipartite graph; enumerate candidate edge
// sets of size r+c-1, peel leaves to solve the unique flow, keep feasible
// ones.
inline double ot_vertex_enumeration(const std::vector<double>& p, const std::vector<double>& q,
                                    const std::vector<std::vector<double>>& cost) {
  const int r = static_cast<int>(p.size()), c = static_cast<int>(q.size());
  const int cells = r * c, pick = r + c - 1;
  std::vector<int> comb(pick);
  for (int i = 0; i < pick; ++i) comb[i] = i;
  double best = std::numeric_limits<double>::infinity();

  auto evaluate = [&]() {
    std::vector<std::vector<std::pair<int, int>>> adj(r + c);  // node -> (other, cell)
    for (int k = 0; k < pick; ++k) {
      const int i = comb[k] / c, j = comb[k] % c;
      adj[i].push_back({r + j, comb[k]});
      adj[r + j].push_back({i, comb[k]});
    }
    std::vector<double> remaining(r + c);
    for (int i = 0; i < r; ++i) remaining[i] = p[i];
    for (int j = 0; j < c; ++j) remaining[r + j] = q[j];
    std::vector<int> degree(r + c);
    for (int v = 0; v < r + c; ++v) degree[v] = static_cast<int>(adj[v].size());
    std::vector<bool> edge_done(static_cast<std::size_t>(cells), false);
    std::vector<int> leaves;
    for (int v = 0; v < r + c; ++v)
      if (degree[v] == 1) leaves.push_back(v);

    double total = 0.0;
    int solved = 0;
    while (!leaves.empty()) {
      const int v = leaves.back();
      leaves.pop_back();
      if (degree[v] != 1) continue;
      int cell = -1, other = -1;
      for (auto [o, e] : adj[v])
        if (!edge_done[e]) {
          cell = e;
          other = o;
          break;
        }
      if (cell < 0) continue;
      const double flow = remaining[v];
      if (flow < -1e-12) return std::numeric_limits<double>::infinity();
      edge_done[cell] = true;
      total += std::max(flow, 0.0) * cost[cell / c][cell % c];
      remaining[v] = 0.0;
      remaining[other] -= flow;
      --degree[v];
      if (--degree[other] == 1) leaves.push_back(other);
      ++solved;
    }
    if (solved != pick) return std::numeric_limits<double>::infinity();  // cyclic: not a tree
    return total;
  };

  while (true) {
    best = std::min(best, evaluate());
    int i = pick - 1;
    while (i >= 0 && comb[i] == cells - pick + i) --i;
    if (i < 0) break;
    ++comb[i];
    for (int j = i + 1; j < pick; ++j) comb[j] = comb[j - 1] + 1;
  }
  require(std::isfinite(best), "ot_vertex_enumeration: no feasible vertex found");
  return best;
}

// Min-cost flow via successive shortest paths with Dijkstra potentials.
// Costs must be nonnegative; each augmentation zeroes a remaining supply or
// demand exactly, so at most r+c rounds run.
inline double ot_min_cost_flow(const std::vector<double>& p, const std::vector<double>& q,
                               const std::vector<std::vector<double>>& cost) {
  const int r = static_cast<int>(p.size()), c = static_cast<int>(q.size());
  const int source = r + c, sink = r + c + 1, nodes = r + c + 2;

  struct Edge {
    int to;
    double cap;
    double cost;
    int rev;
  };
  std::vector<std::vector<Edge>> graph(nodes);
  auto add_edge = [&](int from, int to, double cap, double cst) {
    graph[from].push_back({to, cap, cst, static_cast<int>(graph[to].size())});
    graph[to].push_back({from, 0.0, -cst, static_cast<int>(graph[from].size()) - 1});
  };
  for (int i = 0; i < r; ++i) add_edge(source, i, p[i], 0.0);
  for (int j = 0; j < c; ++j) add_edge(r + j, sink, q[j], 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) add_edge(i, r + j, std::numeric_limits<double>::infinity(), cost[i][j]);

  std::vector<double> potential(nodes, 0.0);
  double total_cost = 0.0;
  double delivered = 0.0;
  const double kTiny = 1e-15;

  // Each round saturates at least one residual arc, but guard against
  // floating-point stalls anyway.
  const int max_rounds = 8 * nodes + 64;
  for (int round = 0; round < max_rounds; ++round) {
    std::vector<double> dist(nodes, std::numeric_limits<double>::infinity());
    std::vector<int> prev_node(nodes, -1), prev_edge(nodes, -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[source] = 0.0;
    heap.push({0.0, source});
    while (!heap.empty()) {
      auto [d, u] = heap.top();
      heap.pop();
      if (d > dist[u] + 1e-18) continue;
      for (int e = 0; e < static_cast<int>(graph[u].size()); ++e) {
        const Edge& edge = graph[u][e];
        if (edge.cap <= kTiny) continue;
        // reduced costs are >= 0 up to rounding; clamp the ulp-scale
        // negatives so forward/reverse arc pairs cannot form a descending
        // cycle that stalls the relaxation
        const double reduced = std::max(0.0, edge.cost + potential[u] - potential[edge.to]);
        const double nd = dist[u] + reduced;
        if (nd < dist[edge.to] - 1e-18) {
          dist[edge.to] = nd;
          prev_node[edge.to] = u;
          prev_edge[edge.to] = e;
          heap.push({nd, edge.to});
        }
      }
    }
    if (!std::isfinite(dist[sink])) break;
    for (int v = 0; v < nodes; ++v)
      if (std::isfinite(dist[v])) potential[v] += dist[v];

    double push = std::numeric_limits<double>::infinity();
    for (int v = sink; v != source; v = prev_node[v])
      push = std::min(push, graph[prev_node[v]][prev_edge[v]].cap);
    if (!(push > kTiny)) break;
    for (int v = sink; v != source; v = prev_node[v]) {
      Edge& edge = graph[prev_node[v]][prev_edge[v]];
      edge.cap -= push;
      if (edge.cap < kTiny) edge.cap = 0.0;
      graph[v][edge.rev].cap += push;
      total_cost += push * edge.cost;
    }
    delivered += push;
  }
  require(delivered > 1.0 - 1e-9, "ot_min_cost_flow: solver stalled, delivered mass " +
                                      std::to_string(delivered));
  return total_cost;
}

}  // namespace uda::est::detail
