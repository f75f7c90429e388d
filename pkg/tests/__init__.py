# AmbiVer tests
