# Style compensation package
