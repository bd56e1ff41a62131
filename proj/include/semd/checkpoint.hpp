#pragma once

#include "semd/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace semd {

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

// Checkpoint container: "SEMD" magic, u32 format version, u64 array count,
// then per array: u32 name length, name bytes, u32 rank, rank u64 dims,
// payload as little-endian f64.
void write_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_checkpoint(const std::string& path);

// Low-level encoding shared with the dataset container.
namespace wire {

void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
void put_string(std::ostream& os, const std::string& s);
void put_f64(std::ostream& os, const double* p, std::size_t n);
void put_array(std::ostream& os, const NamedArray& a);
void put_arrays(std::ostream& os, const std::vector<NamedArray>& arrays);

std::uint32_t get_u32(std::istream& is);
std::uint64_t get_u64(std::istream& is);
std::string get_string(std::istream& is);
void get_f64(std::istream& is, double* p, std::size_t n);
NamedArray get_array(std::istream& is);
std::vector<NamedArray> get_arrays(std::istream& is);

} // namespace wire

} // namespace semd
