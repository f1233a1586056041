#include "profmon/image_io.hpp"

#include "profmon/errors.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace profmon {
namespace {

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in, const fs::path& path) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) throw InvalidInput(path.string() + ": truncated PGM header");
    return tok;
}

int header_int(std::istream& in, const fs::path& path) {
    const std::string tok = header_token(in, path);
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw InvalidInput(path.string() + ": bad PGM header field '" + tok + "'");
    }
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        rows.push_back(split_csv(line));
    }
    return rows;
}

std::vector<fs::path> pgm_files(const fs::path& directory) {
    std::error_code ec;
    if (!fs::is_directory(directory, ec)) throw IoError("not a directory: " + directory.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(directory)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".pgm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    return files;
}

}  // namespace

Profile read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    if (header_token(in, path) != "P5") throw InvalidInput(path.string() + ": not a binary PGM (P5) file");
    const int width = header_int(in, path);
    const int height = header_int(in, path);
    const int maxval = header_int(in, path);
    if (width < 1 || height < 1) throw InvalidInput(path.string() + ": nonpositive image size");
    if (maxval < 1 || maxval > 255) throw InvalidInput(path.string() + ": only 8-bit grayscale is supported");

    std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw IoError(path.string() + ": truncated pixel data");

    std::vector<float> values(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) values[i] = static_cast<float>(bytes[i] / 255.0);
    return Profile(height, width, std::move(values));
}

void write_pgm(const fs::path& path, const Profile& p) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << p.width() << ' ' << p.height() << "\n255\n";
    std::vector<unsigned char> bytes(p.size());
    const auto v = p.values();
    for (std::size_t i = 0; i < v.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(static_cast<double>(v[i]), 0.0, 1.0) * 255.0));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

Dataset ingest_images(const fs::path& directory, const ClassMap& class_map) {
    Dataset data;
    for (const auto& file : pgm_files(directory)) {
        const std::string name = file.filename().string();
        std::optional<int> label;
        if (!class_map.empty()) {
            label = kInControlLabel;
            for (const auto& [pattern, value] : class_map) {
                if (fnmatch(pattern.c_str(), name.c_str(), 0) == 0) {
                    label = value;
                    break;
                }
            }
        }
        data.add(read_pgm(file), name, label);
    }
    return data;
}

void export_dataset(const fs::path& directory, const Dataset& data) {
    std::error_code ec;
    fs::create_directories(directory, ec);
    if (ec) throw IoError("cannot create " + directory.string() + ": " + ec.message());

    std::ofstream labels(directory / "labels.csv");
    if (!labels) throw IoError("cannot write " + (directory / "labels.csv").string());
    labels << "filename,label\n";
    const bool truth = data.has_truth();
    std::ofstream truth_csv;
    if (truth) {
        truth_csv.open(directory / "truth.csv");
        if (!truth_csv) throw IoError("cannot write " + (directory / "truth.csv").string());
        truth_csv << "filename,c0,a,shift_kind,delta\n";
        truth_csv.precision(17);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::string name = data.name(i);
        if (fs::path(name).extension() != ".pgm") name += ".pgm";
        write_pgm(directory / name, data[i]);
        labels << name << ',';
        if (data.label(i)) labels << *data.label(i);
        labels << '\n';
        if (truth) {
            const auto& t = *data.truth(i);
            truth_csv << name << ',' << t.c0 << ',' << t.a << ',' << t.shift_kind << ',' << t.delta << '\n';
        }
    }
}

Dataset import_dataset(const fs::path& directory) {
    std::map<std::string, int> labels;
    if (fs::exists(directory / "labels.csv")) {
        for (const auto& row : read_csv(directory / "labels.csv")) {
            if (row.size() < 2 || row[1].empty()) continue;
            try {
                labels[row[0]] = std::stoi(row[1]);
            } catch (const std::exception&) {
                throw InvalidInput("labels.csv: bad label '" + row[1] + "' for " + row[0]);
            }
        }
    }
    std::map<std::string, SampleTruth> truths;
    if (fs::exists(directory / "truth.csv")) {
        for (const auto& row : read_csv(directory / "truth.csv")) {
            if (row.size() != 5) throw InvalidInput("truth.csv: expected 5 columns");
            try {
                truths[row[0]] = SampleTruth{std::stod(row[1]), std::stod(row[2]), row[3], std::stod(row[4])};
            } catch (const std::invalid_argument&) {
                throw InvalidInput("truth.csv: bad number in row for " + row[0]);
            }
        }
    }
    Dataset data;
    for (const auto& file : pgm_files(directory)) {
        const std::string name = file.filename().string();
        std::optional<int> label;
        if (auto it = labels.find(name); it != labels.end()) label = it->second;
        std::optional<SampleTruth> truth;
        if (auto it = truths.find(name); it != truths.end()) truth = it->second;
        data.add(read_pgm(file), name, label, truth);
    }
    return data;
}

}  // namespace profmon
