#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gidnet/errors.hpp"

namespace gidnet::data {

// Axis-aligned pixel box, origin top-left, x2 > x1 and y2 > y1.
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool valid() const { return x2 > x1 && y2 > y1; }
};

struct DetectedInstance {
    Box box;
    std::string category;  // "person" or an object class
    double score = 0.0;
};

struct HoiTriplet {
    Box human;
    std::optional<Box> object;
    int verb = 0;
    double score = 0.0;
};

struct VerbEntry {
    std::string name;
    bool requires_object = true;
};

class VerbTable {
  public:
    VerbTable() = default;
    explicit VerbTable(std::vector<VerbEntry> entries);

    int size() const { return static_cast<int>(entries_.size()); }
    const VerbEntry& at(int id) const;
    int id_of(const std::string& name) const;  // throws LoadError on unknown names
    const std::vector<VerbEntry>& entries() const { return entries_; }

  private:
    std::vector<VerbEntry> entries_;
};

struct ImageRecord {
    int id = 0;
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // 8-bit RGB, row-major
    std::vector<DetectedInstance> detections;
    std::vector<HoiTriplet> ground_truth;  // triplet scores unused for GT
};

struct Dataset {
    VerbTable verbs;
    std::vector<ImageRecord> images;
};

// Candidate (human, object-or-none) pair fed to the branches.
struct PairProposal {
    DetectedInstance human;
    std::optional<DetectedInstance> object;
};

// Keeps person detections scoring above 0.8 and object detections above 0.4
// (strict), emits every human x object pair plus one object-less entry per
// kept human.
std::vector<PairProposal> propose_pairs(const std::vector<DetectedInstance>& detections);

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& dataset, const std::string& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace gidnet::data
