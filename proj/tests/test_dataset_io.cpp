#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "dcs3gd/dataset_io.hpp"

using namespace dcs3gd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "dcs3gd_test_dataset_io";
    fs::create_directories(dir);
    return dir / name;
}

DatasetFile classification_file() {
    DatasetFile f;
    f.samples = make_synthetic_dataset(ModelKind::logistic_regression, 50, 5, 3, 9);
    f.dimension = 5;
    f.n_classes = 3;
    return f;
}

void expect_same(const DatasetFile& a, const DatasetFile& b) {
    EXPECT_EQ(a.classification, b.classification);
    EXPECT_EQ(a.dimension, b.dimension);
    EXPECT_EQ(a.n_classes, b.n_classes);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        EXPECT_EQ(a.samples[i].features, b.samples[i].features);
        EXPECT_EQ(a.samples[i].label, b.samples[i].label);
        EXPECT_EQ(a.samples[i].target, b.samples[i].target);
    }
}

}  // namespace

TEST(DatasetIo, BinaryRoundTrip) {
    const auto f = classification_file();
    const auto path = scratch("cls.bin");
    write_dataset(f, path);
    expect_same(read_dataset(path), f);
    EXPECT_EQ(fs::file_size(path), 40u + 50 * 5 * 8 + 50 * 4);
}

TEST(DatasetIo, BinaryHeaderLayout) {
    const auto path = scratch("header.bin");
    write_dataset_binary(classification_file(), path);
    std::ifstream in(path, std::ios::binary);
    unsigned char h[40];
    in.read(reinterpret_cast<char*>(h), 40);
    EXPECT_EQ(std::string(reinterpret_cast<char*>(h), 8), "DCS3DATA");
    EXPECT_EQ(h[8], 1);   // version, little-endian
    EXPECT_EQ(h[12], 1);  // class labels
    EXPECT_EQ(h[16], 50);
    EXPECT_EQ(h[24], 5);
    EXPECT_EQ(h[32], 3);
}

TEST(DatasetIo, RegressionRoundTripBothFormats) {
    DatasetFile f;
    f.classification = false;
    f.dimension = 3;
    f.samples = make_synthetic_dataset(ModelKind::quadratic, 20, 3, 0, 2);
    for (std::size_t i = 0; i < f.samples.size(); ++i) f.samples[i].target = 0.1 * static_cast<double>(i);
    for (const char* name : {"reg.bin", "reg.csv"}) {
        const auto path = scratch(name);
        write_dataset(f, path);
        expect_same(read_dataset(path), f);
    }
}

TEST(DatasetIo, CsvRoundTripIsExact) {
    const auto f = classification_file();
    const auto path = scratch("cls.csv");
    write_dataset(f, path);
    expect_same(read_dataset(path), f);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "f0,f1,f2,f3,f4,label");
}

TEST(DatasetIo, CsvErrorsCarryLineNumbers) {
    const auto path = scratch("bad.csv");
    std::ofstream(path) << "f0,f1,label\n1,2,0\n1,x,1\n";
    try {
        read_dataset(path);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    std::ofstream(path) << "f0,f1,label\n1,2\n";
    EXPECT_THROW(read_dataset(path), IoError);
    std::ofstream(path) << "f0,f1,label\n1,2,0.5\n";
    EXPECT_THROW(read_dataset(path), IoError);
}

TEST(DatasetIo, BinaryCorruptionDetected) {
    const auto path = scratch("corrupt.bin");
    write_dataset_binary(classification_file(), path);
    fs::resize_file(path, fs::file_size(path) - 3);
    EXPECT_THROW(read_dataset(path), IoError);
    std::ofstream(path, std::ios::binary) << "NOTDATA!garbage";
    EXPECT_THROW(read_dataset(path), IoError);
    EXPECT_THROW(read_dataset(scratch("missing.bin")), IoError);
}
