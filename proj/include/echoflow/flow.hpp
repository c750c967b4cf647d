#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "echoflow/kfold.hpp"

namespace echoflow {

/// Five-tuple identifying a connection. Backward packets carry the same key
/// with endpoints swapped; assembly normalizes both orientations onto one key.
struct FlowKey {
    std::string src_addr;
    std::string dst_addr;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    std::uint8_t proto = 0;

    bool operator==(const FlowKey& o) const = default;

    // Orientation-independent map key.
    std::string canonical() const {
        std::string a = src_addr + ":" + std::to_string(src_port);
        std::string b = dst_addr + ":" + std::to_string(dst_port);
        if (b < a) std::swap(a, b);
        return a + "|" + b + "|" + std::to_string(proto);
    }

    // True when (src, sport) of the given endpoints matches this key's orientation.
    bool same_orientation(const std::string& src, std::uint16_t sport) const {
        return src == src_addr && sport == src_port;
    }
};

struct PacketRecord {
    double timestamp = 0.0;       // seconds since trace epoch
    std::uint32_t size = 0;       // bytes, 1..65535
    std::uint8_t direction = 0;   // 0 forward, 1 backward
    FlowKey key;
    std::string label;            // optional, attaches to the flow
};

// Packet as stored inside an assembled flow: flow-relative time, size, direction.
struct FlowPacket {
    double t = 0.0;
    std::uint32_t size = 0;
    std::uint8_t dir = 0;
};

struct Flow {
    FlowKey key;
    std::string label;
    std::vector<FlowPacket> packets;  // time-ordered, first packet at t = 0

    double duration() const { return packets.empty() ? 0.0 : packets.back().t; }
    std::uint64_t total_bytes() const {
        std::uint64_t s = 0;
        for (const auto& p : packets) s += p.size;
        return s;
    }
};

struct FilterParams {
    double timeout_tau = 0.0;
    std::size_t min_packets = 0;
    std::uint64_t min_bytes = 0;
    double min_duration = 0.0;
};

struct LabeledDataset {
    std::vector<Flow> flows;
    std::vector<std::string> classes;  // sorted, distinct

    int class_index(const std::string& label) const {
        auto it = std::lower_bound(classes.begin(), classes.end(), label);
        if (it == classes.end() || *it != label)
            throw std::invalid_argument("unknown class label: " + label);
        return static_cast<int>(it - classes.begin());
    }

    std::vector<int> label_indices() const {
        std::vector<int> out;
        out.reserve(flows.size());
        for (const auto& f : flows) out.push_back(class_index(f.label));
        return out;
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(classes.size(), 0);
        for (const auto& f : flows) counts[class_index(f.label)]++;
        return counts;
    }
};

inline LabeledDataset make_labeled_dataset(std::vector<Flow> flows) {
    LabeledDataset ds;
    for (const auto& f : flows) {
        if (f.label.empty()) throw std::invalid_argument("flow without label in labeled dataset");
        ds.classes.push_back(f.label);
    }
    std::sort(ds.classes.begin(), ds.classes.end());
    ds.classes.erase(std::unique(ds.classes.begin(), ds.classes.end()), ds.classes.end());
    ds.flows = std::move(flows);
    return ds;
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

template <typename T>
T parse_number(std::string_view s, std::size_t line_no, const char* what) {
    T value{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw std::runtime_error("line " + std::to_string(line_no) + ": bad " + what +
                                 " value '" + std::string(s) + "'");
    return value;
}

}  // namespace detail

inline constexpr const char* kPacketCsvHeader = "ts,size,dir,src,dst,sport,dport,proto";

// Reads a packet-record CSV with header ts,size,dir,src,dst,sport,dport,proto[,label].
inline std::vector<PacketRecord> parse_packet_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open packet CSV: " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty packet CSV: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool has_label = false;
    if (line == std::string(kPacketCsvHeader) + ",label")
        has_label = true;
    else if (line != kPacketCsvHeader)
        throw std::runtime_error("unexpected CSV header: " + line);

    std::vector<PacketRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = detail::split_csv_line(line);
        std::size_t expected = has_label ? 9 : 8;
        if (f.size() != expected)
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(expected) + " fields, got " +
                                     std::to_string(f.size()));
        PacketRecord r;
        r.timestamp = detail::parse_number<double>(f[0], line_no, "ts");
        if (r.timestamp < 0.0)
            throw std::runtime_error("line " + std::to_string(line_no) + ": ts must be >= 0");
        auto size = detail::parse_number<std::uint32_t>(f[1], line_no, "size");
        if (size < 1)
            throw std::runtime_error("line " + std::to_string(line_no) + ": size must be >= 1");
        if (size > 65535)
            throw std::runtime_error("line " + std::to_string(line_no) + ": size must be <= 65535");
        r.size = size;
        auto dir = detail::parse_number<int>(f[2], line_no, "dir");
        if (dir != 0 && dir != 1)
            throw std::runtime_error("line " + std::to_string(line_no) + ": dir must be 0 or 1");
        r.direction = static_cast<std::uint8_t>(dir);
        r.key.src_addr = std::string(f[3]);
        r.key.dst_addr = std::string(f[4]);
        r.key.src_port = detail::parse_number<std::uint16_t>(f[5], line_no, "sport");
        r.key.dst_port = detail::parse_number<std::uint16_t>(f[6], line_no, "dport");
        r.key.proto = detail::parse_number<std::uint8_t>(f[7], line_no, "proto");
        if (has_label) r.label = std::string(f[8]);
        records.push_back(std::move(r));
    }
    return records;
}

// Groups records by normalized key, re-bases timestamps so each flow starts at
// t = 0, and truncates to the collection window [0, tau). Forward direction is
// the orientation of the first packet seen for a key.
inline std::vector<Flow> assemble_flows(const std::vector<PacketRecord>& records, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("collection window tau must be positive");

    std::vector<Flow> flows;
    std::unordered_map<std::string, std::size_t> index;
    std::vector<std::vector<std::pair<double, FlowPacket>>> raw;  // absolute-time packets

    for (const auto& r : records) {
        std::string canon = r.key.canonical();
        auto [it, inserted] = index.try_emplace(canon, flows.size());
        if (inserted) {
            Flow f;
            f.key = r.key;
            f.label = r.label;
            flows.push_back(std::move(f));
            raw.emplace_back();
        }
        Flow& flow = flows[it->second];
        if (r.label != flow.label)
            throw std::runtime_error("mixed labels within one flow key: '" + flow.label +
                                     "' vs '" + r.label + "'");
        FlowPacket p;
        p.size = r.size;
        p.dir = flow.key.same_orientation(r.key.src_addr, r.key.src_port) ? 0 : 1;
        raw[it->second].emplace_back(r.timestamp, p);
    }

    for (std::size_t i = 0; i < flows.size(); ++i) {
        auto& pkts = raw[i];
        std::stable_sort(pkts.begin(), pkts.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        double t0 = pkts.front().first;
        for (auto& [ts, p] : pkts) {
            p.t = ts - t0;
            if (p.t < tau) flows[i].packets.push_back(p);
        }
    }
    return flows;
}

inline std::vector<Flow> filter_flows(const std::vector<Flow>& flows, const FilterParams& p) {
    std::vector<Flow> kept;
    for (const auto& f : flows) {
        if (f.packets.size() >= p.min_packets && f.total_bytes() >= p.min_bytes &&
            f.duration() >= p.min_duration)
            kept.push_back(f);
    }
    return kept;
}

// Random undersampling: every class is reduced to the minimum class count.
inline LabeledDataset balance_undersample(const LabeledDataset& ds, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> per_class(ds.classes.size());
    for (std::size_t i = 0; i < ds.flows.size(); ++i)
        per_class[ds.class_index(ds.flows[i].label)].push_back(i);

    std::size_t min_count = SIZE_MAX;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        if (per_class[c].empty())
            throw std::invalid_argument("class '" + ds.classes[c] + "' has zero flows");
        min_count = std::min(min_count, per_class[c].size());
    }

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> kept;
    for (auto& idx : per_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        kept.insert(kept.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(min_count));
    }
    std::sort(kept.begin(), kept.end());

    LabeledDataset out;
    out.classes = ds.classes;
    out.flows.reserve(kept.size());
    for (auto i : kept) out.flows.push_back(ds.flows[i]);
    return out;
}

// Stratified k-fold over the dataset's flows.
inline std::vector<FoldSplit> split_kfold(const LabeledDataset& ds, std::size_t k,
                                          std::uint64_t seed) {
    return stratified_kfold(ds.label_indices(), k, seed);
}

inline nlohmann::json dataset_to_json(const LabeledDataset& ds) {
    nlohmann::json jflows = nlohmann::json::array();
    for (const auto& f : ds.flows) {
        nlohmann::json jp = nlohmann::json::array();
        for (const auto& p : f.packets)
            jp.push_back({p.t, p.size, p.dir});
        jflows.push_back({{"key",
                           {{"src", f.key.src_addr},
                            {"dst", f.key.dst_addr},
                            {"sport", f.key.src_port},
                            {"dport", f.key.dst_port},
                            {"proto", f.key.proto}}},
                          {"label", f.label},
                          {"packets", std::move(jp)}});
    }
    return {{"classes", ds.classes}, {"flows", std::move(jflows)}};
}

inline LabeledDataset dataset_from_json(const nlohmann::json& j) {
    LabeledDataset ds;
    ds.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& jf : j.at("flows")) {
        Flow f;
        const auto& k = jf.at("key");
        f.key.src_addr = k.at("src").get<std::string>();
        f.key.dst_addr = k.at("dst").get<std::string>();
        f.key.src_port = k.at("sport").get<std::uint16_t>();
        f.key.dst_port = k.at("dport").get<std::uint16_t>();
        f.key.proto = k.at("proto").get<std::uint8_t>();
        f.label = jf.at("label").get<std::string>();
        for (const auto& jp : jf.at("packets")) {
            FlowPacket p;
            p.t = jp.at(0).get<double>();
            p.size = jp.at(1).get<std::uint32_t>();
            p.dir = jp.at(2).get<std::uint8_t>();
            f.packets.push_back(p);
        }
        ds.flows.push_back(std::move(f));
    }
    return ds;
}

inline void save_dataset(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset: " + path);
    out << dataset_to_json(ds).dump(2) << "\n";
}

inline LabeledDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    nlohmann::json j;
    in >> j;
    return dataset_from_json(j);
}

}  // namespace echoflow
