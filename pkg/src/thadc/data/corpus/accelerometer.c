/*
 * Sample reader for an SPI accelerometer.  Sets the legacy 8-bit mode,
 * then the bus clock, and fetches axis samples as full-duplex messages.
 */

#define SPI_IOC_MESSAGE_1 1075866368
#define SPI_IOC_WR_MODE 1073834753
#define SPI_IOC_WR_MAX_SPEED_HZ 1074031364
#define SPI_MODE_3 3
#define BUS_SPEED_HZ 1000000

int sensor_setup(int fd) {
    ioctl(fd, SPI_IOC_WR_MODE, SPI_MODE_3);
    ioctl(fd, SPI_IOC_WR_MAX_SPEED_HZ, BUS_SPEED_HZ);
    return 0;
}

int read_axes(int fd) {
    int status = ioctl(fd, SPI_IOC_MESSAGE_1, 0);
    return status;
}

int main(void) {
    int fd = open("/dev/spidev0.1", 2);
    if (fd < 0) {
        return 1;
    }
    if (sensor_setup(fd) < 0) {
        close(fd);
        return 1;
    }
    int sample = read_axes(fd);
    close(fd);
    return 0;
}
