/*
 * Faulty revision of the accelerometer reader: samples are pulled with
 * plain read() calls and the bus-clock setup never happens, so the
 * device runs at whatever speed the driver booted with.
 */

#define SPI_IOC_WR_MODE 1073834753
#define SPI_MODE_3 3
#define SAMPLE_BYTES 6

int sensor_setup(int fd) {
    ioctl(fd, SPI_IOC_WR_MODE, SPI_MODE_3);
    return 0;
}

int main(void) {
    int fd = open("/dev/spidev0.1", 2);
    if (fd < 0) {
        return 1;
    }
    sensor_setup(fd);
    int sample = read(fd, 0, SAMPLE_BYTES);
    close(fd);
    return 0;
}
