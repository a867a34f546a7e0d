/*
 * Port of the classic SPI loopback test: sets and reads back the mode,
 * word size and bus speed, then runs a single transfer.
 */

#define SPI_IOC_MESSAGE_1 1075866368
#define SPI_IOC_RD_MODE32 2147773189
#define SPI_IOC_WR_MODE32 1074031365
#define SPI_IOC_RD_BITS_PER_WORD 2147576579
#define SPI_IOC_WR_BITS_PER_WORD 1073834755
#define SPI_IOC_RD_MAX_SPEED_HZ 2147773188
#define SPI_IOC_WR_MAX_SPEED_HZ 1074031364
#define SPI_MODE_0 0
#define WORD_BITS 8
#define BUS_SPEED_HZ 500000

int configure(int fd) {
    ioctl(fd, SPI_IOC_WR_MODE32, SPI_MODE_0);
    ioctl(fd, SPI_IOC_RD_MODE32, 0);
    ioctl(fd, SPI_IOC_WR_BITS_PER_WORD, WORD_BITS);
    ioctl(fd, SPI_IOC_RD_BITS_PER_WORD, 0);
    ioctl(fd, SPI_IOC_WR_MAX_SPEED_HZ, BUS_SPEED_HZ);
    ioctl(fd, SPI_IOC_RD_MAX_SPEED_HZ, 0);
    return 0;
}

int transfer(int fd) {
    int status = ioctl(fd, SPI_IOC_MESSAGE_1, 0);
    return status;
}

int main(void) {
    int fd = open("/dev/spidev1.1", 2);
    if (fd < 0) {
        return 1;
    }
    configure(fd);
    transfer(fd);
    close(fd);
    return 0;
}
