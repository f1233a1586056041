#pragma once

#include "profmon/profile.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace profmon {

// Binary (P5) 8-bit PGM. Intensities are byte/255.
Profile read_pgm(const std::filesystem::path& path);

// Values are clamped to [0,1] and rounded to the nearest byte.
void write_pgm(const std::filesystem::path& path, const Profile& p);

// Ordered (glob pattern, label) pairs; the first matching pattern wins.
using ClassMap = std::vector<std::pair<std::string, int>>;

// Reads every *.pgm file in lexicographic filename order. Files matching no
// pattern are labelled in-control when a class map is given, unlabelled otherwise.
Dataset ingest_images(const std::filesystem::path& directory, const ClassMap& class_map = {});

// Directory of PGM files plus labels.csv (filename,label) and, when every
// sample carries ground truth, truth.csv (filename,c0,a,shift_kind,delta).
void export_dataset(const std::filesystem::path& directory, const Dataset& data);
Dataset import_dataset(const std::filesystem::path& directory);

}  // namespace profmon
