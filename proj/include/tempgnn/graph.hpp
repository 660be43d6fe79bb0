#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tempgnn/buckets.hpp"
#include "tempgnn/data.hpp"
#include "tempgnn/error.hpp"

namespace tempgnn {

struct GraphNode {
  std::size_t item = 0;
  std::size_t tn_bucket = 0;
};

struct GraphEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::size_t te_bucket = 0;
  std::int64_t interval_ms = 0;
};

enum class Direction { kIncoming, kOutgoing };

// Session prefix as a directed graph over unique (item, TN bucket) pairs.
// Edges follow consecutive clicks and are kept as multi-edges; seq_to_node
// recovers the original sequence order for the readout.
struct SessionGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  std::vector<std::size_t> seq_to_node;
  std::vector<std::int64_t> seq_tn_diff;  // prediction_ts - ts_j, clamped at 0
  std::vector<std::vector<std::size_t>> in_edges;   // edge ids, edge order
  std::vector<std::vector<std::size_t>> out_edges;

  // (neighbor node, te bucket) with multiplicity, in edge insertion order.
  std::vector<std::pair<std::size_t, std::size_t>> neighbors(
      std::size_t node, Direction dir) const {
    if (node >= nodes.size()) {
      throw ValidationError("neighbors: node " + std::to_string(node) +
                            " out of range");
    }
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const auto& ids = dir == Direction::kIncoming ? in_edges[node]
                                                  : out_edges[node];
    out.reserve(ids.size());
    for (std::size_t e : ids) {
      const GraphEdge& edge = edges[e];
      out.emplace_back(dir == Direction::kIncoming ? edge.src : edge.dst,
                       edge.te_bucket);
    }
    return out;
  }
};

struct GraphBuildStats {
  std::size_t clamped_tn_diffs = 0;
};

// Either bucketizer may be null: a null TN bucketizer collapses node
// identity to the item alone (used by the none/position/constant encoders),
// a null TE bucketizer stamps bucket 0 on every edge.
inline SessionGraph build_graph(const LabeledInstance& instance,
                                const Bucketizer<>* tn_bucketizer,
                                const Bucketizer<>* te_bucketizer,
                                GraphBuildStats* stats = nullptr) {
  if (instance.prefix.empty()) {
    throw ValidationError("build_graph: empty prefix");
  }
  SessionGraph g;
  std::size_t n = instance.prefix.size();
  g.seq_to_node.resize(n);
  g.seq_tn_diff.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const IndexedEvent& e = instance.prefix[j];
    std::int64_t diff = instance.prediction_timestamp - e.timestamp;
    if (diff < 0) {
      diff = 0;
      if (stats) ++stats->clamped_tn_diffs;
    }
    g.seq_tn_diff[j] = diff;
    std::size_t bucket = tn_bucketizer ? tn_bucketizer->bucketize(diff) : 0;
    std::size_t node = g.nodes.size();
    for (std::size_t k = 0; k < g.nodes.size(); ++k) {
      if (g.nodes[k].item == e.item && g.nodes[k].tn_bucket == bucket) {
        node = k;
        break;
      }
    }
    if (node == g.nodes.size()) g.nodes.push_back(GraphNode{e.item, bucket});
    g.seq_to_node[j] = node;
  }
  g.in_edges.resize(g.nodes.size());
  g.out_edges.resize(g.nodes.size());
  for (std::size_t j = 0; j + 1 < n; ++j) {
    std::int64_t interval =
        instance.prefix[j + 1].timestamp - instance.prefix[j].timestamp;
    GraphEdge edge;
    edge.src = g.seq_to_node[j];
    edge.dst = g.seq_to_node[j + 1];
    edge.te_bucket = te_bucketizer ? te_bucketizer->bucketize(interval) : 0;
    edge.interval_ms = interval;
    g.out_edges[edge.src].push_back(g.edges.size());
    g.in_edges[edge.dst].push_back(g.edges.size());
    g.edges.push_back(edge);
  }
  return g;
}

// Plain-text adjacency listing for --dump-graphs and golden tests.
inline std::string dump_graph(const SessionGraph& g) {
  std::ostringstream out;
  for (std::size_t k = 0; k < g.nodes.size(); ++k) {
    out << "node " << k << ": item=" << g.nodes[k].item
        << " tn=" << g.nodes[k].tn_bucket << "; out -> [";
    const auto& ids = g.out_edges[k];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out << ", ";
      out << g.edges[ids[i]].dst << " (te=" << g.edges[ids[i]].te_bucket << ")";
    }
    out << "]\n";
  }
  return out.str();
}

}  // namespace tempgnn
