#include "ssdkv/cli.hpp"

int main(int argc, char** argv) { return ssdkv::dispatch(argc, argv); }
