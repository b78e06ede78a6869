#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "volterra/ensemble.hpp"
#include "volterra/errors.hpp"
#include "volterra/fields.hpp"

namespace volterra {

// Binary container: 40-byte header (magic "VOLX", u32 version, u64 n_paths,
// u64 M, u64 n, u64 seed), then little-endian 64-bit floats.  Version 1 is a
// bare ensemble (states then increments); version 2 appends tagged sections
// (4-char tag + u64 count + doubles).
namespace io {

inline void write_header(std::ofstream& f, std::uint32_t version, std::uint64_t n_paths,
                         std::uint64_t M, std::uint64_t n, std::uint64_t seed) {
    f.write("VOLX", 4);
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&n_paths), 8);
    f.write(reinterpret_cast<const char*>(&M), 8);
    f.write(reinterpret_cast<const char*>(&n), 8);
    f.write(reinterpret_cast<const char*>(&seed), 8);
}

struct Header {
    std::uint32_t version = 0;
    std::uint64_t n_paths = 0, M = 0, n = 0, seed = 0;
};

inline Header read_header(std::ifstream& f, const std::string& path) {
    char magic[4];
    Header h;
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "VOLX", 4) != 0)
        throw DataError("not a VOLX container: " + path);
    f.read(reinterpret_cast<char*>(&h.version), 4);
    f.read(reinterpret_cast<char*>(&h.n_paths), 8);
    f.read(reinterpret_cast<char*>(&h.M), 8);
    f.read(reinterpret_cast<char*>(&h.n), 8);
    f.read(reinterpret_cast<char*>(&h.seed), 8);
    if (!f) throw DataError("truncated VOLX header: " + path);
    return h;
}

inline void write_section(std::ofstream& f, const char tag[4], const std::vector<double>& data) {
    f.write(tag, 4);
    const std::uint64_t count = data.size();
    f.write(reinterpret_cast<const char*>(&count), 8);
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(count * 8));
}

inline bool read_section(std::ifstream& f, std::string& tag, std::vector<double>& data) {
    char t[4];
    f.read(t, 4);
    if (!f) return false;
    std::uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 8);
    if (!f) throw DataError("truncated VOLX section header");
    tag.assign(t, 4);
    data.resize(count);
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * 8));
    if (!f) throw DataError("truncated VOLX section '" + tag + "'");
    return true;
}

} // namespace io

inline void dump_ensemble(const PathEnsemble& ens, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + path);
    io::write_header(f, 1, static_cast<std::uint64_t>(ens.n_paths),
                     static_cast<std::uint64_t>(ens.grid.steps), static_cast<std::uint64_t>(ens.n), ens.seed);
    double T = ens.grid.horizon;
    f.write(reinterpret_cast<const char*>(&T), 8);
    f.write(reinterpret_cast<const char*>(ens.states.data()), static_cast<std::streamsize>(ens.states.size() * 8));
    f.write(reinterpret_cast<const char*>(ens.dX.data()), static_cast<std::streamsize>(ens.dX.size() * 8));
    if (!f) throw DataError("write failed: " + path);
}

inline PathEnsemble load_ensemble(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    const io::Header h = io::read_header(f, path);
    if (h.version != 1) throw DataError("unsupported ensemble container version in " + path);
    double T = 0.0;
    f.read(reinterpret_cast<char*>(&T), 8);
    PathEnsemble ens;
    ens.grid = TimeGrid::uniform(T, static_cast<int>(h.M));
    ens.n_paths = static_cast<int>(h.n_paths);
    ens.n = static_cast<int>(h.n);
    ens.seed = h.seed;
    ens.states.resize(h.n_paths * (h.M + 1) * h.n);
    ens.dX.resize(h.n_paths * h.M * h.n);
    f.read(reinterpret_cast<char*>(ens.states.data()), static_cast<std::streamsize>(ens.states.size() * 8));
    f.read(reinterpret_cast<char*>(ens.dX.data()), static_cast<std::streamsize>(ens.dX.size() * 8));
    if (!f) throw DataError("truncated ensemble container: " + path);
    return ens;
}

inline void dump_field(const FieldSolution& field, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + path);
    io::write_header(f, 2, static_cast<std::uint64_t>(field.n_paths),
                     static_cast<std::uint64_t>(field.M()), static_cast<std::uint64_t>(field.n), 0);
    io::write_section(f, "GRD_", {field.tgrid.horizon, static_cast<double>(field.J()),
                                  static_cast<double>(field.d), field.simplified ? 1.0 : 0.0});
    io::write_section(f, "U__\0", field.U);
    io::write_section(f, "V__\0", field.V);
    io::write_section(f, "dU_\0", field.dU);
    io::write_section(f, "dV_\0", field.dV);
    io::write_section(f, "YD_\0", field.Ydiag);
    io::write_section(f, "ZD_\0", field.Zdiag);
    if (!f) throw DataError("write failed: " + path);
}

inline FieldSolution load_field(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    const io::Header h = io::read_header(f, path);
    if (h.version != 2) throw DataError("unsupported field container version in " + path);
    FieldSolution fs;
    fs.n_paths = static_cast<int>(h.n_paths);
    fs.n = static_cast<int>(h.n);
    std::string tag;
    std::vector<double> data;
    bool have_grid = false;
    while (io::read_section(f, tag, data)) {
        if (tag == "GRD_") {
            fs.tgrid = TimeGrid::uniform(data.at(0), static_cast<int>(h.M));
            fs.sgrid = ParamGrid::uniform(data.at(0), static_cast<int>(data.at(1)));
            fs.d = static_cast<int>(data.at(2));
            fs.simplified = data.at(3) != 0.0;
            have_grid = true;
        } else if (tag.rfind("U__", 0) == 0) fs.U = data;
        else if (tag.rfind("V__", 0) == 0) fs.V = data;
        else if (tag.rfind("dU_", 0) == 0) fs.dU = data;
        else if (tag.rfind("dV_", 0) == 0) fs.dV = data;
        else if (tag.rfind("YD_", 0) == 0) fs.Ydiag = data;
        else if (tag.rfind("ZD_", 0) == 0) fs.Zdiag = data;
        else throw DataError("unknown VOLX section '" + tag + "' in " + path);
    }
    if (!have_grid) throw DataError("field container missing grid section: " + path);
    return fs;
}

} // namespace volterra
